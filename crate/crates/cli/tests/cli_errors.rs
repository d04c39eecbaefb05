use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_causal-debias")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_schema_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::write(&csv, "a,b\n1,2\n3,4\n5,7\n").unwrap();
    let o = run(&["discover", "--data", csv.to_str().unwrap(), "--schema", "no_such_schema.json", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error: "), "{err}");
    assert!(err.contains("no_such_schema.json"), "{err}");
}

#[test]
fn bad_script_entry_is_reported_by_index() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("h.csv");
    let o = run(&["synth-gen", "--n", "300", "--seed", "1", "--out", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let script = dir.path().join("s.json");
    std::fs::write(
        &script,
        r#"[{"stage":"refine","op":"add","source":"Age","target":"Nope"}]"#,
    )
    .unwrap();
    let schema = dir.path().join("h.schema.json");
    let o = run(&[
        "debias",
        "--data",
        csv.to_str().unwrap(),
        "--schema",
        schema.to_str().unwrap(),
        "--script",
        script.to_str().unwrap(),
        "--seed",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("record 0") && err.contains("Nope"), "{err}");
}

#[test]
fn independent_columns_give_no_edges() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let mut text = String::from("x,y\n");
    // Two deterministic, unrelated sequences.
    for i in 0..400u64 {
        let x = (i * 7919 % 401) as f64 / 401.0;
        let y = (i * 104_729 % 397) as f64 / 397.0;
        text.push_str(&format!("{x},{}\n", (y * 13.0).sin()));
    }
    std::fs::write(&csv, text).unwrap();
    let o = run(&["discover", "--data", csv.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let graph: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("graph.json")).unwrap()).unwrap();
    let edges = graph["edges"].as_array().expect("edges array");
    assert!(edges.is_empty(), "{edges:?}");
}
