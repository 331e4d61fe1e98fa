use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dpclust"))
}

#[test]
fn gen_cluster_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("g.csv");
    let st = bin()
        .args(["gen-data", "--n", "300", "--d", "2", "--seed", "3", "--out"])
        .arg(&data)
        .status()
        .unwrap();
    assert!(st.success());

    let out = dir.path().join("c.json");
    let st = bin()
        .args(["cluster", "--k", "3", "--epsilon", "1", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v["cost"].as_f64().unwrap().is_finite());
    assert!(v["centers"].as_array().unwrap().len() <= 3);

    let code = |args: &[&str]| {
        bin()
            .args(args)
            .arg("--data")
            .arg(&data)
            .output()
            .unwrap()
            .status
            .code()
    };
    assert_eq!(code(&["cluster", "--k", "3"]), Some(2));
    assert_eq!(
        code(&["cluster", "--k", "3", "--epsilon", "1", "--z", "3"]),
        Some(2)
    );
    assert_eq!(
        code(&[
            "mpc-sim",
            "--k",
            "3",
            "--epsilon",
            "1",
            "--machines",
            "4",
            "--memory-words",
            "500"
        ]),
        Some(3)
    );
    assert_eq!(
        code(&["mpc-sim", "--k", "3", "--epsilon", "1", "--machines", "4"]),
        Some(0)
    );

    let missing = bin()
        .args([
            "cluster",
            "--k",
            "3",
            "--epsilon",
            "1",
            "--data",
            "/nonexistent.csv",
        ])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(4));
}

#[test]
fn ingest_drops_label_column() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    std::fs::write(&raw, "x,y,label\n1,2,a\n3,4,b\n0,0,a\n").unwrap();
    let out = dir.path().join("n.csv");
    let st = bin()
        .args(["ingest", "--drop", "2", "--input"])
        .arg(&raw)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        st.status.success(),
        "{}",
        String::from_utf8_lossy(&st.stderr)
    );
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3);
    for line in text.lines() {
        let r: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(r.len(), 2);
        assert!(r.iter().map(|x| x * x).sum::<f64>() <= 1.0);
    }
}

#[test]
fn bench_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"dataset":{"source":"synthetic","kind":"blobs","n":200,"d":2,"seed":1},
            "algorithms":["hst","kmedianpp"],"ks":[2],"epsilons":[1.0,null],"seeds":[0]}"#,
    )
    .unwrap();
    let out = dir.path().join("r.json");
    let csv = dir.path().join("r.csv");
    let st = bin()
        .arg("bench")
        .arg("--spec")
        .arg(&spec)
        .arg("--out")
        .arg(&out)
        .arg("--csv")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(
        st.status.success(),
        "{}",
        String::from_utf8_lossy(&st.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 3);
}
