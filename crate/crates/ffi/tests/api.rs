use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use cherrynet_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cn_last_error()) }.to_string_lossy().into_owned()
}

unsafe fn tensor(shape: &[usize], values: &[f64]) -> *mut CnTensor {
    let mut t = ptr::null_mut();
    assert_eq!(cn_tensor_new(shape.as_ptr(), shape.len(), values.as_ptr(), &mut t), CnStatus::Ok);
    t
}

#[test]
fn tensor_roundtrip_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.txt").to_str().unwrap()).unwrap();
    unsafe {
        let vals: Vec<f64> = (0..6).map(|v| v as f64 * 0.1).collect();
        let t = tensor(&[2, 3], &vals);
        assert_eq!(cn_tensor_order(t), 2);
        assert_eq!(cn_tensor_len(t), 6);
        let mut dims = [0usize; 2];
        assert_eq!(cn_tensor_shape(t, dims.as_mut_ptr(), 2), CnStatus::Ok);
        assert_eq!(dims, [2, 3]);
        assert_eq!(cn_tensor_shape(t, dims.as_mut_ptr(), 1), CnStatus::InvalidArgument);
        assert_eq!(cn_tensor_write(t, path.as_ptr()), CnStatus::Ok);

        let mut back = ptr::null_mut();
        assert_eq!(cn_tensor_read(path.as_ptr(), &mut back), CnStatus::Ok);
        let got = std::slice::from_raw_parts(cn_tensor_values(back), 6);
        assert_eq!(got, &vals[..]);
        cn_tensor_free(back);
        cn_tensor_free(t);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut t = ptr::null_mut();
        let shape = [2usize, 3];
        assert_eq!(cn_tensor_new(shape.as_ptr(), 2, ptr::null(), ptr::null_mut()), CnStatus::NullPointer);
        assert!(last_error().contains("null"));
        assert_eq!(cn_tensor_new(shape.as_ptr(), 2, ptr::null(), &mut t), CnStatus::Ok);
        assert_eq!(last_error(), "");
        cn_tensor_free(t);

        let missing = CString::new("/nonexistent/dir/x.txt").unwrap();
        assert_eq!(cn_tensor_read(missing.as_ptr(), &mut t), CnStatus::Io);
        assert!(!last_error().is_empty());

        let bad_ranks = [2usize, 2];
        let mut count = 0u64;
        let dims = [4usize, 4, 4];
        let status = cn_param_count(dims.as_ptr(), 3, CnModel::Ifctn, bad_ranks.as_ptr(), 2, &mut count);
        assert_eq!(status, CnStatus::InvalidArgument);

        cn_tensor_free(ptr::null_mut());
        cn_report_free(ptr::null_mut());
        assert!(cn_tensor_values(ptr::null()).is_null());
    }
}

#[test]
fn storage_counts() {
    let shape = [256usize, 256, 31];
    let cases: [(CnModel, &[usize], u64); 4] = [
        (CnModel::Ifctn, &[4, 4, 4], 4344),
        (CnModel::Fctn, &[4, 4, 4], 8688),
        (CnModel::Tucker, &[8, 8, 8], 4856),
        (CnModel::Tt, &[9, 9], 23319),
    ];
    for (model, ranks, want) in cases {
        let mut got = 0u64;
        let s = unsafe { cn_param_count(shape.as_ptr(), 3, model, ranks.as_ptr(), ranks.len(), &mut got) };
        assert_eq!(s, CnStatus::Ok);
        assert_eq!(got, want, "{model:?}");
    }
}

#[test]
fn fiber_mask_shape() {
    let shape = [4usize, 5, 6];
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(cn_gen_mask(shape.as_ptr(), 3, CnMaskKind::Fiber, 0.5, 2, 1, &mut m), CnStatus::Ok);
        let vals = std::slice::from_raw_parts(cn_tensor_values(m), 120);
        assert_eq!(vals.iter().filter(|&&v| v == 0.0).count(), 60);
        cn_tensor_free(m);
        assert_eq!(
            cn_gen_mask(shape.as_ptr(), 3, CnMaskKind::Random, 1.0, 0, 1, &mut m),
            CnStatus::InvalidArgument
        );
    }
}

#[test]
fn complete_keeps_observed_entries() {
    let shape = [5usize, 4, 3];
    let vals: Vec<f64> = (0..60).map(|i| 0.5 + 0.01 * i as f64).collect();
    unsafe {
        let x = tensor(&shape, &vals);
        let mut mask = ptr::null_mut();
        assert_eq!(cn_gen_mask(shape.as_ptr(), 3, CnMaskKind::Random, 0.3, 0, 3, &mut mask), CnStatus::Ok);
        let mut cfg = cn_solver_config_default();
        assert_eq!(cfg.rho, 0.1);
        assert_eq!(cfg.max_iter, 1000);
        cfg.max_iter = 25;
        cfg.assert_decrease = true;
        let ranks = [2usize, 1, 2];
        let mut report = ptr::null_mut();
        assert_eq!(cn_complete(x, mask, ranks.as_ptr(), 3, &cfg, &mut report), CnStatus::Ok, "{}", last_error());
        let mut n = 0;
        let trace = cn_report_objective_trace(report, &mut n);
        assert_eq!(n, cn_report_iterations(report));
        let trace = std::slice::from_raw_parts(trace, n);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));

        let mut rec = ptr::null_mut();
        assert_eq!(cn_report_recovered(report, &mut rec), CnStatus::Ok);
        let r = std::slice::from_raw_parts(cn_tensor_values(rec), 60);
        let m = std::slice::from_raw_parts(cn_tensor_values(mask), 60);
        for i in 0..60 {
            if m[i] == 1.0 {
                assert_eq!(r[i].to_bits(), vals[i].to_bits());
            }
        }

        let mut metrics = CnMetrics { psnr: 0.0, ssim: 0.0, rse: 0.0, rmse: 0.0 };
        assert_eq!(cn_metrics(x, rec, ptr::null(), &mut metrics), CnStatus::Ok);
        assert!(metrics.rmse.is_nan());
        assert!(metrics.rse >= 0.0);

        let wrong = [1usize, 1];
        assert_eq!(
            cn_complete(x, mask, wrong.as_ptr(), 2, &cfg, &mut report),
            CnStatus::InvalidArgument
        );
        cn_tensor_free(rec);
        cn_report_free(report);
        cn_tensor_free(mask);
        cn_tensor_free(x);
    }
}

fn deps_dir() -> PathBuf {
    std::env::current_exe().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = deps_dir().join("libcherrynet_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout), "ok\n");
}
