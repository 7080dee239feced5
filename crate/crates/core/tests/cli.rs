use std::path::Path;
use std::process::{Command, Output};

fn noma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noma"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_exits_zero_and_lists_subcommands() {
    let o = noma(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8_lossy(&o.stdout);
    for sub in ["gen-tasks", "train-prior", "map", "eval", "inspect"] {
        assert!(out.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(noma(&[]).status.code(), Some(1));
    assert_eq!(noma(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let o = noma(&["gen-tasks", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("categories"));
    let o = noma(&["gen-tasks", "--out", p(dir.path()), "--set", "categories=mug", "--set", "bogus=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bogus"));
    let o = noma(&["gen-tasks", "--out", p(dir.path()), "--set", "categories=teapot"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = noma(&["inspect", p(&dir.path().join("absent.prior"))]);
    assert_eq!(o.status.code(), Some(2));
    let junk = dir.path().join("junk.prior");
    std::fs::write(&junk, b"definitely not a prior").unwrap();
    let o = noma(&["inspect", p(&junk)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not a prior bundle"));
}

#[test]
fn gen_tasks_then_eval_ground_truth_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = dir.path().join("gen.cfg");
    std::fs::write(
        &cfg,
        "# tiny dataset\ncategories = ball\ntrain = 1\ntest = 1\ntask.width = 48\ntask.height = 36\n\
         scene.categories = ball,book\nscene.frames = 3\nscene.width = 64\nscene.height = 48\n",
    )
    .unwrap();
    let o = noma(&["gen-tasks", "--out", p(&data), "--config", p(&cfg), "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ball: 1 train, 1 test"));
    assert!(data.join("manifest.txt").is_file());

    let gt = data.join("sequence").join("gt");
    let table = dir.path().join("eval.csv");
    let o = noma(&["eval", "--meshes", p(&gt), "--gt", p(&gt), "--samples", "2000", "--out", p(&table)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&table).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("name,cd,cr@0.004,cr@0.01,emd"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2][0], "mean");
    for row in &rows {
        assert_eq!(row[1].parse::<f64>().unwrap(), 0.0);
        assert_eq!(row[2].parse::<f64>().unwrap(), 1.0);
    }

    let again = dir.path().join("again");
    let o = noma(&["gen-tasks", "--out", p(&again), "--config", p(&cfg), "--seed", "4"]);
    assert!(o.status.success());
    let a = std::fs::read(data.join("sequence").join("frame_0001.rgbd")).unwrap();
    let b = std::fs::read(again.join("sequence").join("frame_0001.rgbd")).unwrap();
    assert_eq!(a, b);
}
