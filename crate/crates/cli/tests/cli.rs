use std::path::Path;
use std::process::{Command, Output};

fn ncam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncam"))
        .args(args)
        .env_remove("NCAM_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn count_frames(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("frame_"))
        .count()
}

/// Trains a tiny DNA model for two steps and returns the checkpoint path.
fn tiny_checkpoint(dir: &Path) -> String {
    let ckpt = dir.join("tiny.ckpt").to_string_lossy().into_owned();
    let log = dir.join("train.csv").to_string_lossy().into_owned();
    let o = ncam(&[
        "train", "--dataset", "glyphs:4:8:mixed:3", "--mode", "dna", "--dim", "4", "--nca-steps", "8", "--steps",
        "2", "--out", &ckpt, "--log", &log,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = std::fs::read_to_string(&log).unwrap();
    assert_eq!(lines.lines().count(), 2);
    assert_eq!(lines.lines().next().unwrap().split(',').count(), 4);
    ckpt
}

#[test]
fn full_workflow_on_a_tiny_model() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(tmp.path());

    // eval prints a JSON report
    let o = ncam(&["eval", "--ckpt", &ckpt, "--seeds", "2", "--mutation", "0.5"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["per_image"].as_array().unwrap().len(), 4);
    assert_eq!(report["seeds"], 2);
    assert!(report["mean"].as_f64().unwrap().is_finite());

    // grow writes ceil(T / k) frames, a GIF and a summary line
    let out = tmp.path().join("grow");
    let out_s = out.to_string_lossy();
    let o = ncam(&["grow", "--ckpt", &ckpt, "--image-id", "3", "--frames-every", "3", "--out", &out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(count_frames(&out), 3);
    assert!(out.join("growth.gif").exists());
    assert!(stdout(&o).contains("mse"));

    // grow is deterministic given the seed
    let again = tmp.path().join("grow2");
    ncam(&["grow", "--ckpt", &ckpt, "--image-id", "3", "--frames-every", "3", "--out", &again.to_string_lossy()]);
    assert_eq!(
        std::fs::read(out.join("final.png")).unwrap(),
        std::fs::read(again.join("final.png")).unwrap()
    );

    // encode prints the DNA export
    let o = ncam(&["encode", "--ckpt", &ckpt, "--image-id", "1"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("NCAM-DNA v1 D=4\n"));

    // splice writes a PNG and the exported letters, then the export regrows
    let sp = tmp.path().join("splice");
    let sp_s = sp.to_string_lossy();
    let o = ncam(&[
        "splice", "--ckpt", &ckpt, "--sources", "0,1,2", "--tau", "0.7", "--target", "3", "--out", &sp_s,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim().len(), 64);
    assert!(sp.join("spliced.png").exists());
    let regrow = tmp.path().join("regrow");
    let o = ncam(&[
        "grow", "--ckpt", &ckpt, "--dna", &sp.join("spliced.dna").to_string_lossy(), "--out",
        &regrow.to_string_lossy(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(sp.join("final.png")).unwrap(),
        std::fs::read(regrow.join("final.png")).unwrap()
    );

    // export-dna, one file per image
    let ex = tmp.path().join("dna");
    let o = ncam(&["export-dna", "--ckpt", &ckpt, "--out", &ex.to_string_lossy()]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_dir(&ex).unwrap().count(), 4);

    // resuming continues the step count
    let o = ncam(&["train", "--resume", &ckpt, "--steps", "1", "--out", &ckpt]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("total 3"));
}

#[test]
fn gen_dataset_writes_pngs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ncam(&["gen-dataset", "--count", "5", "--size", "12", "--out", &tmp.path().to_string_lossy()]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 5);
    // the written PNGs load back as a dataset and train
    let ckpt = tmp.path().join("c.ckpt");
    let o = ncam(&[
        "train", "--dataset", &format!("png:{}", tmp.path().display()), "--dim", "4", "--nca-steps", "4", "--steps",
        "1", "--out", &ckpt.to_string_lossy(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(ncam(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(ncam(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ncam(&["--help"]).status.code(), Some(0));
    let out = tmp.path().join("x.ckpt").to_string_lossy().into_owned();
    assert_eq!(
        ncam(&["train", "--dataset", "glyphs:4:8", "--lr", "-1", "--out", &out]).status.code(),
        Some(2)
    );
    assert_eq!(
        ncam(&["train", "--dataset", "glyphs:4:8", "--lr-final", "0", "--out", &out]).status.code(),
        Some(2)
    );
    assert_eq!(
        ncam(&["train", "--dataset", "cifar:/nonexistent/file.bin", "--out", &out]).status.code(),
        Some(3)
    );
    let garbage = tmp.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    assert_eq!(
        ncam(&["eval", "--ckpt", &garbage.to_string_lossy()]).status.code(),
        Some(3)
    );
    let ckpt = tiny_checkpoint(tmp.path());
    assert_eq!(
        ncam(&["grow", "--ckpt", &ckpt, "--image-id", "42", "--out", &tmp.path().join("g").to_string_lossy()])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn divergence_exits_with_code_four() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d.ckpt").to_string_lossy().into_owned();
    let o = ncam(&[
        "train", "--dataset", "glyphs:2:8", "--dim", "4", "--nca-steps", "4", "--steps", "20", "--lr", "1e30",
        "--out", &out,
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}
