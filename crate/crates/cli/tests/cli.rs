//! CLI behavior: file outputs, exit codes, config plumbing.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graphpre"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("graphpre-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn graphpre")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gen_corpus_writes_files_manifest_and_echo() {
    let dir = tmp_dir("gen");
    let out = run(&[
        "gen-corpus",
        "--count",
        "8",
        "--seed",
        "1",
        "--out",
        dir.to_str().unwrap(),
        "--set",
        "gen.n_min=20",
        "--set",
        "gen.n_max=40",
        "--set",
        "gen.mean_degree_min=5",
        "--set",
        "gen.mean_degree_max=9",
    ]);
    assert_code(&out, 0);
    for i in 0..8 {
        assert!(dir.join(format!("g{i:05}.graph")).exists());
        assert!(dir.join(format!("g{i:05}.json")).exists());
    }
    let manifest = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 8);
    let echo = std::fs::read_to_string(dir.join("config_echo.cfg")).unwrap();
    assert!(echo.contains("gen.count = 8"));
    assert!(echo.contains("gen.n_min = 20"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn centrality_csv_has_n_rows_and_five_columns() {
    let dir = tmp_dir("centrality");
    std::fs::create_dir_all(&dir).unwrap();
    let graph_path = dir.join("g.graph");
    std::fs::write(&graph_path, "4 3\n0 1\n1 2\n2 3\n").unwrap();
    let out = run(&["centrality", graph_path.to_str().unwrap()]);
    assert_code(&out, 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5); // header + 4 nodes
    for line in &lines {
        assert_eq!(line.split(',').count(), 5);
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let out = run(&["gen-corpus", "--cuont", "8"]);
    assert_code(&out, 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage") || err.contains("unexpected"), "{err}");
}

#[test]
fn unknown_subcommand_exits_one() {
    let out = run(&["generat"]);
    assert_code(&out, 1);
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_code(&out, 0);
}

#[test]
fn missing_input_file_is_user_error() {
    let out = run(&["centrality", "/nonexistent/graph.txt"]);
    assert_code(&out, 1);
    let out = run(&["pretrain", "--set", "pretrain.corpus=/nonexistent/manifest.txt"]);
    assert_code(&out, 1); // missing required key pretrain.out -> config error
}

#[test]
fn bad_config_key_is_user_error() {
    let out = run(&["gen-corpus", "--set", "gen.cout=8"]);
    assert_code(&out, 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown config key"), "{err}");
}

#[test]
fn pretrain_finetune_eval_sweep_pipeline() {
    let dir = tmp_dir("pipeline");
    let corpus = dir.join("corpus");
    let run = |args: &[&str]| {
        let out = run(args);
        assert_code(&out, 0);
        String::from_utf8_lossy(&out.stdout).to_string()
    };
    run(&[
        "gen-corpus",
        "--count",
        "8",
        "--seed",
        "5",
        "--out",
        corpus.to_str().unwrap(),
        "--set",
        "gen.n_min=25",
        "--set",
        "gen.n_max=40",
        "--set",
        "gen.k_min=0.8",
        "--set",
        "gen.mean_degree_min=6",
        "--set",
        "gen.mean_degree_max=10",
    ]);
    let pre_out = dir.join("pre");
    run(&[
        "pretrain",
        "--set",
        &format!("pretrain.corpus={}/manifest.txt", corpus.display()),
        "--set",
        &format!("pretrain.out={}", pre_out.display()),
        "--set",
        "pretrain.max_steps=4",
        "--set",
        "pretrain.graphs_per_step=2",
        "--set",
        "pretrain.n_pos=8",
        "--set",
        "pretrain.n_neg=16",
        "--set",
        "pretrain.val_every=2",
        "--set",
        "model.hidden_dim=8",
        "--set",
        "model.layers=2",
    ]);
    let ckpt = pre_out.join("best.ckpt");
    assert!(ckpt.exists());

    let ft_out = dir.join("ft");
    let ft_args = [
        "finetune",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--task",
        "node",
        "--boundary",
        "1",
        "--epochs",
        "3",
        "--seed",
        "1",
        "--task-seed",
        "3",
        "--out",
        ft_out.to_str().unwrap(),
        "--set",
        "adapt.n_min=30",
        "--set",
        "adapt.n_max=45",
    ];
    let ft_stdout = run(&ft_args);
    assert!(ft_stdout.contains("micro-F1"), "{ft_stdout}");
    let result = std::fs::read_to_string(ft_out.join("result.csv")).unwrap();
    assert!(result.starts_with("task,boundary,init_mode,seed,micro_f1,epochs,wall_time"));

    // Evaluating the fine-tuned checkpoint regenerates the identical task
    // and must report the same score the fine-tune run printed.
    let eval_stdout = run(&[
        "eval",
        "--checkpoint",
        ft_out.join("finetuned.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(ft_stdout.trim(), eval_stdout.trim());

    let sweep_out = dir.join("sweep");
    run(&[
        "sweep-boundary",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--task",
        "node",
        "--boundaries",
        "0,1",
        "--seeds",
        "2",
        "--epochs",
        "2",
        "--out",
        sweep_out.to_str().unwrap(),
        "--set",
        "adapt.n_min=30",
        "--set",
        "adapt.n_max=45",
    ]);
    let sweep = std::fs::read_to_string(sweep_out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 2 * 2 * 2);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn features_csv_roundtrip_through_out_flag() {
    let dir = tmp_dir("features");
    std::fs::create_dir_all(&dir).unwrap();
    let graph_path = dir.join("g.graph");
    std::fs::write(&graph_path, "3 2\n0 1\n1 2\n").unwrap();
    let csv_path = dir.join("f.csv");
    let out = run(&[
        "features",
        graph_path.to_str().unwrap(),
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 8);
    let _ = std::fs::remove_dir_all(&dir);
}
