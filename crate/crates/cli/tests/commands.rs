use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use crsqn_cli::{cmd_compare, cmd_run, CompareArgs, RunArgs};

fn crsqn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crsqn")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const REMARK: [&str; 12] = [
    "--a", "0.75", "--b", "0", "--c", "0.24", "--gamma0", "0.9", "--delta0", "0.9", "--mu0", "0.9",
];

const QUADRATIC: &str = r#"
algorithm = "crsqn"
iterations = 100
seed = 3
eval_every = 10
output = "trace.jsonl"

[schedule]
gamma0 = 0.9
delta0 = 0.9
mu0 = 0.9
a = 0.8
b = 0.0
c = 0.2

[synthetic]
kind = "quadratic"
n = 20
rank = 15
N = 200
seed = 0
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn validate_schedule_exit_codes() {
    let mut args = vec!["validate-schedule"];
    args.extend(REMARK);
    let ok = crsqn(&[args.as_slice(), &["--mode", "as"]].concat());
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    assert!(stdout(&ok).contains("a+2c+b>1"));

    let mut low = args.clone();
    low[2] = "0.5";
    let bad = crsqn(&low);
    assert_eq!(code(&bad), 1);
    assert!(stdout(&bad).contains("invalid (a>3c+b"), "{}", stdout(&bad));

    let mut high = args.clone();
    high[2] = "0.9";
    high[6] = "0.2";
    let bad = crsqn(&[high.as_slice(), &["--mode", "mean"]].concat());
    assert_eq!(code(&bad), 1);
    assert!(stdout(&bad).contains("-a+4c+b>=0"));

    assert_eq!(code(&crsqn(&["validate-schedule", "--a", "zero"])), 2);
    assert_eq!(code(&crsqn(&["validate-schedule", "--a", "0.8"])), 2);
    assert_eq!(code(&crsqn(&["validate-schedule", "--mode", "sometimes"])), 2);
}

#[test]
fn validate_schedule_reads_config_section() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "q.toml", QUADRATIC);
    assert_eq!(code(&crsqn(&["validate-schedule", "--config", &cfg])), 0);
    assert_eq!(code(&crsqn(&["validate-schedule", "--config", &cfg, "--a", "0.5"])), 1);
}

#[test]
fn run_writes_trace_with_expected_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "q.toml", QUADRATIC);
    for (every, lines) in [("10", 12), ("30", 6), ("100", 3)] {
        let out = crsqn(&["run", "--config", &cfg, "--eval_every", every]);
        assert_eq!(code(&out), 0, "{}", stdout(&out));
        let summary = stdout(&out);
        assert!(
            summary.starts_with("algorithm=CR-SQN status=finished k=100 final_loss="),
            "{summary}"
        );
        let text = fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
        assert_eq!(text.lines().count(), lines, "eval_every {every}");
    }
}

#[test]
fn run_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing_data = QUADRATIC.replace(
        "[synthetic]\nkind = \"quadratic\"\nn = 20\nrank = 15\nN = 200\nseed = 0\n",
        "",
    ) + "[dataset]\npath = \"nowhere.csv\"\nlabel_column = \"label\"\n";
    let cfg = write(dir.path(), "missing.toml", &missing_data);
    assert_eq!(code(&crsqn(&["run", "--config", &cfg])), 3);

    let cfg = write(dir.path(), "unknown.toml", &format!("colour = \"red\"\n{QUADRATIC}"));
    assert_eq!(code(&crsqn(&["run", "--config", &cfg])), 2);
    assert!(!dir.path().join("trace.jsonl").exists());

    let cfg = write(
        dir.path(),
        "zero.toml",
        &QUADRATIC.replace("iterations = 100", "iterations = 0"),
    );
    assert_eq!(code(&crsqn(&["run", "--config", &cfg])), 2);

    let cfg = write(
        dir.path(),
        "res.toml",
        &QUADRATIC.replace("algorithm = \"crsqn\"", "algorithm = \"res\""),
    );
    assert_eq!(code(&crsqn(&["run", "--config", &cfg])), 2);

    assert_eq!(code(&crsqn(&["run", "--config", "/definitely/not/here.toml"])), 3);
    let cfg = write(dir.path(), "ok.toml", QUADRATIC);
    assert_eq!(
        code(&crsqn(&[
            "run",
            "--config",
            &cfg,
            "--out",
            "/definitely/not/here/t.jsonl"
        ])),
        3
    );
    assert!(!dir.path().join("trace.jsonl").exists());
}

#[test]
fn stationary_run_exits_one_and_keeps_trace() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "flat.csv", "f1,f2,label\n0,0,1\n0,0,0\n0,0,1\n");
    let doc = QUADRATIC.replace(
        "[synthetic]\nkind = \"quadratic\"\nn = 20\nrank = 15\nN = 200\nseed = 0\n",
        "[dataset]\npath = \"flat.csv\"\nlabel_column = \"label\"\nstandardize = false\n",
    );
    let cfg = write(dir.path(), "flat.toml", &doc);
    let out = crsqn(&["run", "--config", &cfg]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("status=stationary k=0"));
    assert!(dir.path().join("trace.jsonl").exists());
}

#[test]
fn csv_dataset_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("age,income,label\n");
    for i in 0..40 {
        csv.push_str(&format!(
            "{},{},{}\n",
            20 + i,
            1000 * (i % 7),
            if i % 3 == 0 { -1 } else { 1 }
        ));
    }
    write(dir.path(), "data.csv", &csv);
    let doc = r#"
algorithm = "sa"
iterations = 50
output = "sa.jsonl"

[constants]
gamma0 = 0.1

[dataset]
path = "data.csv"
label_column = "label"
intercept = true
"#;
    let cfg = write(dir.path(), "sa.toml", doc);
    let out = crsqn(&["run", "--config", &cfg, "--gamma0", "0.05"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = fs::read_to_string(dir.path().join("sa.jsonl")).unwrap();
    assert!(text.lines().next().unwrap().contains("\"gamma0\":0.05"));
    assert!(text.lines().next().unwrap().contains("\"dim\":3"));
}

fn comparison_doc(blocks: &str) -> String {
    format!(
        "iterations = 300\nseeds = [1, 2, 3]\noutput = \"table.csv\"\n\n\
         [synthetic]\nkind = \"logistic\"\nn = 5\nN = 80\nseed = 2\n\n{blocks}"
    )
}

#[test]
fn compare_table_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let table1 = comparison_doc(
        "[[runs]]\nalgorithm = \"crsqn\"\n\
         schedule = { gamma0 = 0.01, delta0 = 1.0, mu0 = 1.0, a = 0.8, b = 0.0, c = 0.2 }\n\
         sweep = { parameter = \"mu0\", values = [1.0, 0.1, 0.01, 0.001] }\n\n\
         [[runs]]\nalgorithm = \"res\"\nconstants = { gamma0 = 0.01, mu = 1.0, delta = 1.0 }\n\
         sweep = { parameter = \"mu\", values = [1.0, 0.1, 0.01, 0.001] }\n",
    );
    let cfg = write(dir.path(), "t1.toml", &table1);
    assert_eq!(code(&crsqn(&["compare", "--config", &cfg])), 0);
    let csv = fs::read_to_string(dir.path().join("table.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 9);
    assert_eq!(lines[0], "algorithm,parameter,value,mean_loss,std,seeds");
    assert!(lines[1].starts_with("CR-SQN,mu0,1,"));
    assert!(lines[8].starts_with("RES,mu,0.001,") && lines[8].ends_with(",1 2 3"));

    let table2 = comparison_doc(
        "[[runs]]\nalgorithm = \"crsqn\"\n\
         schedule = { gamma0 = 0.1, delta0 = 1.0, mu0 = 1.0, a = 0.8, b = 0.0, c = 0.2 }\n\
         sweep = { parameter = \"gamma0\", values = [0.1, 0.01, 0.001, 0.0001] }\n\n\
         [[runs]]\nalgorithm = \"sa\"\nconstants = { gamma0 = 0.1 }\n\
         sweep = { parameter = \"gamma0\", values = [0.1, 0.01, 0.001, 0.0001] }\n",
    );
    let cfg = write(dir.path(), "t2.toml", &table2);
    assert_eq!(
        code(&crsqn(&[
            "compare",
            "--config",
            &cfg,
            "--out",
            "/definitely/not/here/t.csv"
        ])),
        3
    );
    let out = dir.path().join("t2.csv");
    assert_eq!(
        code(&crsqn(&["compare", "--config", &cfg, "--out", out.to_str().unwrap()])),
        0
    );
    assert_eq!(fs::read_to_string(out).unwrap().lines().count(), 9);

    let bad = comparison_doc(
        "[[runs]]\nalgorithm = \"sa\"\nconstants = { gamma0 = 0.1 }\nsweep = { parameter = \"mu\", values = [1.0] }\n",
    );
    let cfg = write(dir.path(), "bad.toml", &bad);
    assert_eq!(code(&crsqn(&["compare", "--config", &cfg])), 2);
}

#[test]
fn single_block_matches_run_summary() {
    let dir = tempfile::tempdir().unwrap();
    let compare_doc = comparison_doc(
        "[[runs]]\nalgorithm = \"crsqn\"\n\
         schedule = { gamma0 = 0.1, delta0 = 1.0, mu0 = 1.0, a = 0.8, b = 0.0, c = 0.2 }\n",
    );
    let cfg = write(dir.path(), "one.toml", &compare_doc);
    let mut args = CompareArgs::new(&cfg);
    args.seed = Some(2);
    let table = cmd_compare(&args, &mut std::io::sink()).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].parameter, "gamma0");

    let run_doc = "algorithm = \"crsqn\"\niterations = 300\nseed = 2\neval_every = 7\noutput = \"one.jsonl\"\n\n\
                   [schedule]\ngamma0 = 0.1\ndelta0 = 1.0\nmu0 = 1.0\na = 0.8\nb = 0.0\nc = 0.2\n\n\
                   [synthetic]\nkind = \"logistic\"\nn = 5\nN = 80\nseed = 2\n";
    let cfg = write(dir.path(), "one-run.toml", run_doc);
    let mut summary = Vec::new();
    let outcome = cmd_run(&RunArgs::new(&cfg), &mut summary).unwrap();
    assert_eq!(outcome.trace.final_loss(), table.rows[0].mean_loss);
    let summary = String::from_utf8(summary).unwrap();
    assert!(
        summary.contains(&format!("final_loss={}", table.rows[0].mean_loss)),
        "{summary}"
    );
}
