use std::ffi::{CStr, CString};
use std::ptr;

use ccr_gnn::c2g::build_graph;
use ccr_gnn::gat::PoolKind;
use ccr_gnn::model::{forward, CcrGnnConfig, Checkpoint};
use ccr_gnn::train::{init_params, InitKind};
use ccr_gnn_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ccr_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

struct Fixture {
    _dir: tempfile::TempDir,
    path: CString,
    ckpt: Checkpoint,
}

fn fixture() -> Fixture {
    let model = CcrGnnConfig {
        channels: vec![2, 3],
        pooling: vec![PoolKind::Mean, PoolKind::Max],
        mlp_hidden: vec![5],
        num_classes: 4,
        ..Default::default()
    };
    let params = init_params(&model, 5, 3, InitKind::XavierUniform).unwrap();
    let ckpt = Checkpoint::new(model, params, None, 3, 0);
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("m.ckpt");
    ckpt.save(&file).unwrap();
    Fixture {
        _dir: dir,
        path: CString::new(file.to_str().unwrap()).unwrap(),
        ckpt,
    }
}

fn load(f: &Fixture) -> *mut CcrModel {
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { ccr_model_load(f.path.as_ptr(), &mut model) }, CcrStatus::Ok);
    assert!(!model.is_null());
    model
}

const X: [f64; 5] = [0.1, 0.9, 0.4, 0.7, 0.25];

#[test]
fn model_predictions_match_the_library() {
    let f = fixture();
    let model = load(&f);
    unsafe {
        assert_eq!(ccr_model_feature_dim(model), 5);
        assert_eq!(ccr_model_num_classes(model), 4);
        let expected = forward(
            &f.ckpt.params,
            &f.ckpt.header.model,
            &build_graph(&X, f.ckpt.header.model.c2g_step).unwrap(),
        )
        .unwrap();

        let mut class = usize::MAX;
        assert_eq!(ccr_model_predict(model, X.as_ptr(), X.len(), &mut class), CcrStatus::Ok);
        assert_eq!(class, expected.predicted());

        let mut probs = [0.0; 4];
        assert_eq!(
            ccr_model_probabilities(model, X.as_ptr(), X.len(), probs.as_mut_ptr(), probs.len()),
            CcrStatus::Ok
        );
        assert_eq!(probs.to_vec(), expected.probabilities());
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(last_error(), "");
        ccr_model_free(model);
    }
}

#[test]
fn argument_errors_are_reported() {
    let f = fixture();
    let model = load(&f);
    unsafe {
        let mut class = 0usize;
        assert_eq!(ccr_model_predict(model, X.as_ptr(), 4, &mut class), CcrStatus::InvalidArgument);
        assert!(last_error().contains("expected 5 features"), "{}", last_error());

        let mut small = [0.0; 3];
        assert_eq!(
            ccr_model_probabilities(model, X.as_ptr(), X.len(), small.as_mut_ptr(), small.len()),
            CcrStatus::BufferTooSmall
        );
        assert!(last_error().contains("4"));

        assert_eq!(ccr_model_predict(model, ptr::null(), 5, &mut class), CcrStatus::NullPointer);
        assert_eq!(ccr_model_predict(ptr::null(), X.as_ptr(), 5, &mut class), CcrStatus::NullPointer);
        assert_eq!(ccr_model_predict(model, X.as_ptr(), 5, ptr::null_mut()), CcrStatus::NullPointer);
        assert_eq!(ccr_model_feature_dim(ptr::null()), 0);
        ccr_model_free(model);
        ccr_model_free(ptr::null_mut());
    }
}

#[test]
fn load_failures_leave_a_null_handle() {
    unsafe {
        let mut model = ptr::NonNull::<CcrModel>::dangling().as_ptr();
        let missing = CString::new("/definitely/not/here.ckpt").unwrap();
        assert_eq!(ccr_model_load(missing.as_ptr(), &mut model), CcrStatus::Io);
        assert!(model.is_null());
        assert!(last_error().contains("not/here.ckpt"));

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.ckpt");
        std::fs::write(&junk, b"junk junk junk").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(ccr_model_load(junk.as_ptr(), &mut model), CcrStatus::Checkpoint);
        assert!(model.is_null());

        assert_eq!(ccr_model_load(ptr::null(), &mut model), CcrStatus::NullPointer);
        assert_eq!(ccr_model_load(junk.as_ptr(), ptr::null_mut()), CcrStatus::NullPointer);
    }
}

#[test]
fn graph_handle_exposes_edges() {
    unsafe {
        let mut graph = ptr::null_mut();
        assert_eq!(ccr_graph_build(X.as_ptr(), X.len(), 0.01, &mut graph), CcrStatus::Ok);
        let expected = build_graph(&X, 0.01).unwrap();
        assert_eq!(ccr_graph_num_nodes(graph), 5);
        assert_eq!(ccr_graph_num_edges(graph), expected.edges().len());
        assert_eq!(ccr_graph_threshold(graph), expected.threshold());

        let n = ccr_graph_num_edges(graph);
        let mut buf = vec![0usize; 2 * n];
        assert_eq!(ccr_graph_edges(graph, buf.as_mut_ptr(), buf.len()), CcrStatus::Ok);
        let pairs: Vec<(usize, usize)> = buf.chunks(2).map(|c| (c[0], c[1])).collect();
        assert_eq!(pairs, expected.edges());
        assert_eq!(ccr_graph_edges(graph, buf.as_mut_ptr(), 1), CcrStatus::BufferTooSmall);
        ccr_graph_free(graph);

        assert!(ccr_graph_threshold(ptr::null()).is_nan());
        assert_eq!(ccr_graph_build(X.as_ptr(), X.len(), -1.0, &mut graph), CcrStatus::InvalidArgument);
        assert!(graph.is_null());
    }
}

#[test]
fn macro_metrics_over_the_boundary() {
    let pred = [0usize, 1, 1, 2, 2, 2];
    let truth = [0usize, 1, 2, 2, 2, 1];
    let mut m = CcrMetrics::default();
    unsafe {
        assert_eq!(
            ccr_macro_metrics(pred.as_ptr(), truth.as_ptr(), pred.len(), 3, &mut m),
            CcrStatus::Ok
        );
        assert!((m.accuracy - 4.0 / 6.0).abs() < 1e-12);
        // Per class precision 1, 1/2, 2/3 and recall 1, 1/2, 2/3.
        assert!((m.macro_precision - (1.0 + 0.5 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        assert!((m.macro_recall - m.macro_precision).abs() < 1e-12);

        let bad = [5usize];
        assert_ne!(
            ccr_macro_metrics(bad.as_ptr(), bad.as_ptr(), 1, 3, &mut m),
            CcrStatus::Ok
        );
        assert!(!last_error().is_empty());
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ccr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ccr_gnn.h")).unwrap();
    for name in ["ccr_model_load", "ccr_model_probabilities", "ccr_graph_edges", "ccr_macro_metrics", "CCR_STATUS_BUFFER_TOO_SMALL"] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn generated_header_compiles_as_c_and_cpp() {
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include <ccr_gnn.h>\n\
         int main(void) {\n\
           CcrModel *m = 0;\n\
           CcrStatus s = ccr_model_load(\"x\", &m);\n\
           CcrMetrics out;\n\
           (void)out;\n\
           return s == CCR_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    for lang in ["c", "c++"] {
        let status = std::process::Command::new("cc")
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I", include])
            .arg(&src)
            .status();
        match status {
            Ok(s) => assert!(s.success(), "header does not compile as {lang}"),
            Err(e) => {
                eprintln!("skipping {lang} header check: no C compiler ({e})");
                return;
            }
        }
    }
}
