mod common;

use common::{ddimm, estimates, read, write_data};
use ddimm::block_engines::{fit_block, NuisanceSpec, SolverOptions};
use ddimm::combiner::write_archive;
use ddimm::combiner::SummaryBundle;
use ddimm::partition::{load_long_csv, make_plan, split, CsvSchema, GroupStrategy};

const COVS: &str = "intercept,x_1";

fn fit_args<'a>(input: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["fit", "--input", input, "--covariates", COVS, "--out", out];
    v.extend_from_slice(extra);
    v
}

#[test]
fn single_block_fit_matches_the_block_engine() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_data(dir.path(), 60, 6, 1);
    let out = dir.path().join("out");
    let o = ddimm(&fit_args(input.to_str().unwrap(), out.to_str().unwrap(), &["--J", "1", "--K", "1"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let schema = CsvSchema {
        covariates: vec!["intercept".into(), "x_1".into()],
        ..CsvSchema::default()
    };
    let data = load_long_csv(&input, &schema).unwrap();
    let plan = make_plan(6, 60, 1, 1, GroupStrategy::SeededRandom, 2024).unwrap();
    let block = &split(&data, &plan).unwrap()[0];
    let direct = fit_block(block, NuisanceSpec::GeeAr1, &SolverOptions::default()).unwrap();
    let est = estimates(&out.join("estimates.csv"));
    let expected: Vec<f64> = direct.theta.iter().chain(direct.zeta.iter()).copied().collect();
    assert_eq!(est.len(), expected.len());
    for ((name, got), want) in est.iter().zip(&expected) {
        assert!((got - want).abs() <= 1e-8 * (1.0 + want.abs()), "{name}: {got} vs {want}");
    }
    assert_eq!(est[0].0, "intercept");
    assert!(read(&out.join("overid.txt")).contains("df = 0"));
    assert!(read(&out.join("overid.txt")).contains("p_value = NA"));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().count() <= 5, "{stdout}");
}

#[test]
fn outputs_do_not_depend_on_reruns_or_workers() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_data(dir.path(), 120, 12, 2);
    let input = input.to_str().unwrap();
    let runs: Vec<_> = [("a", "1"), ("b", "8"), ("c", "8")]
        .iter()
        .map(|(name, workers)| {
            let out = dir.path().join(name);
            let o = ddimm(&fit_args(input, out.to_str().unwrap(), &["--J", "3", "--K", "2", "--workers", workers]));
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            out
        })
        .collect();
    for file in ["estimates.csv", "overid.txt", "bundle.txt", "plan.txt", "resolved_config.txt"] {
        let first = read(&runs[0].join(file));
        for r in &runs[1..] {
            assert_eq!(first, read(&r.join(file)), "{file}");
        }
    }
}

#[test]
fn rerun_from_resolved_config_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_data(dir.path(), 90, 8, 3);
    let first = dir.path().join("first");
    let o = ddimm(&fit_args(
        input.to_str().unwrap(),
        first.to_str().unwrap(),
        &["--J", "2", "--K", "3", "--seed", "77", "--method", "cl"],
    ));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let config = first.join("resolved_config.txt");
    assert!(read(&config).contains("seed = 77"));
    let second = dir.path().join("second");
    let o = ddimm(&["fit", "--config", config.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for file in ["estimates.csv", "overid.txt", "bundle.txt", "resolved_config.txt"] {
        assert_eq!(read(&first.join(file)), read(&second.join(file)), "{file}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_data(dir.path(), 60, 6, 4);
    let input = input.to_str().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let o = ddimm(&fit_args(input, out, &["--J", "2", "--max-iter", "1"]));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("did not converge") && err.contains("--allow-unconverged"), "{err}");
    assert!(o.stdout.is_empty());

    let o = ddimm(&fit_args(input, out, &["--J", "2", "--max-iter", "1", "--allow-unconverged"]));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let o = ddimm(&fit_args("/nonexistent/data.csv", out, &[]));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/data.csv"));

    let o = ddimm(&fit_args(input, out, &["--J", "4"]));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid plan"));
}

#[test]
fn simulate_smoke_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let args = [
        "simulate", "--N", "100", "--M", "12", "--J", "2", "--K", "1,2", "--reps", "2", "--sigma", "2",
        "--out", out.to_str().unwrap(),
    ];
    let o = ddimm(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let reps = read(&out.join("reps.csv"));
    assert_eq!(reps.lines().count(), 1 + 2 * 2);
    assert!(reps.lines().skip(1).all(|l| l.contains(",ok,")));
    for f in ["summary.csv", "plotdata.csv", "timing.csv", "resolved_config.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(read(&out.join("summary.csv")).lines().count(), 1 + 2 * 3);

    let o = ddimm(&["simulate", "--M", "13", "--J", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("divisible"));
}

#[test]
fn simulate_with_every_replication_failing_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = ddimm(&[
        "simulate", "--N", "40", "--M", "8", "--J", "2", "--K", "1", "--reps", "2", "--max-iter", "1",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("every replication failed"));
    assert!(read(&out.join("reps.csv")).contains("did not converge"));
}

#[test]
fn combine_per_group_bundles_matches_fit() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_data(dir.path(), 150, 10, 5);
    let fit_out = dir.path().join("fit");
    let o = ddimm(&fit_args(input.to_str().unwrap(), fit_out.to_str().unwrap(), &["--J", "2", "--K", "3"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let bundle = SummaryBundle::read(&fit_out.join("bundle.txt")).unwrap();
    let mut paths = Vec::new();
    for k in 0..3 {
        let part = bundle.group_part(k);
        let path = dir.path().join(format!("group{}.txt", k + 1));
        write_archive(&path, &part.plan, &part.theta_names, &part.fits).unwrap();
        paths.push(path.display().to_string());
    }
    let comb_out = dir.path().join("comb");
    let mut args = vec!["combine", "--out", comb_out.to_str().unwrap()];
    args.extend(paths.iter().map(String::as_str));
    let o = ddimm(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&fit_out.join("estimates.csv")), read(&comb_out.join("estimates.csv")));
    assert!(read(&comb_out.join("overid.txt")).contains("skipped"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("skipped"));

    // single bundle: same as fit's combination stage
    let one_out = dir.path().join("one");
    let o = ddimm(&["combine", "--out", one_out.to_str().unwrap(), fit_out.join("bundle.txt").to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(read(&fit_out.join("estimates.csv")), read(&one_out.join("estimates.csv")));
}

#[test]
fn combine_rejects_mismatched_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_data(dir.path(), 80, 8, 6);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let input = input.to_str().unwrap();
    assert!(ddimm(&fit_args(input, a.to_str().unwrap(), &["--J", "2"])).status.success());
    let o = ddimm(&[
        "fit", "--input", input, "--covariates", "intercept", "--out", b.to_str().unwrap(), "--J", "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = ddimm(&[
        "combine",
        a.join("bundle.txt").to_str().unwrap(),
        b.join("bundle.txt").to_str().unwrap(),
        "--out",
        dir.path().join("c").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("incompatible bundles") && err.contains("p ("), "{err}");
}
