//! Compile and run a C program against the generated header and the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "ample.h"

int main(void) {
    size_t dims[2] = {16, 16};
    AmpleBundle *bundle = NULL;
    if (ample_bundle_synth(64, 4, 3, dims, 2, 4.0, 2.5, 7, &bundle) != AMPLE_STATUS_OK) return 10;
    AmpleTrainConfig config;
    if (ample_train_config_default(&config) != AMPLE_STATUS_OK) return 11;
    AmpleModel *model = NULL;
    if (ample_train(bundle, &config, &model) != AMPLE_STATUS_OK) return 12;
    AmpleB2nReport report;
    if (ample_eval_b2n(model, bundle, &report) != AMPLE_STATUS_OK) return 13;
    double hm = 0.0;
    if (ample_harmonic_mean(86.35, 79.08, &hm) != AMPLE_STATUS_OK) return 14;
    AmpleBundle *missing = NULL;
    if (ample_bundle_load("/nonexistent", 1, &missing) != AMPLE_STATUS_IO) return 15;
    if (ample_last_error_message() == NULL) return 16;
    printf("%.2f %zu\n", hm, report.base_total);
    ample_model_free(model);
    ample_bundle_free(bundle);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // <target>/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("ample.h").exists(), "header not generated");
    let lib = target_dir().join("libample_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());

    let work = tempfile::tempdir().unwrap();
    let src = work.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let exe = work.path().join("main");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .expect("a C compiler named `cc` on PATH");
    assert!(status.success());

    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut fields = stdout.split_whitespace();
    assert_eq!(fields.next(), Some("82.56"));
    assert!(fields.next().unwrap().parse::<usize>().unwrap() > 0);
}
