use std::ffi::{CStr, CString};
use std::ptr;

use llgm_ffi::*;

fn cpath(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = llgm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn gradient_image(h: usize, w: usize, scale: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let t = (y * w + x) as f64 / (h * w) as f64;
            v.extend([t * scale, (1.0 - t) * scale, 0.5 * scale]);
        }
    }
    v
}

unsafe fn new_image(h: usize, w: usize, data: &[f64]) -> *mut LlgmImage {
    let mut img = ptr::null_mut();
    assert_eq!(llgm_image_new(h, w, 3, data.as_ptr(), &mut img), LlgmStatus::Ok);
    img
}

#[test]
fn image_round_trip_through_png() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<f64> = (0..4 * 5 * 3).map(|i| (i % 256) as f64 / 255.0).collect();
    unsafe {
        let img = new_image(4, 5, &data);
        let path = cpath(&dir.path().join("a.png"));
        assert_eq!(llgm_image_save(img, path.as_ptr()), LlgmStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(llgm_image_load(path.as_ptr(), &mut back), LlgmStatus::Ok);
        let (mut h, mut w, mut c) = (0, 0, 0);
        assert_eq!(llgm_image_shape(back, &mut h, &mut w, &mut c), LlgmStatus::Ok);
        assert_eq!((h, w, c), (4, 5, 3));
        let mut buf = vec![0.0; 60];
        assert_eq!(llgm_image_copy_data(back, buf.as_mut_ptr(), 60), LlgmStatus::Ok);
        assert_eq!(buf, data);
        assert_eq!(llgm_image_copy_data(back, buf.as_mut_ptr(), 59), LlgmStatus::ShapeMismatch);
        llgm_image_free(img);
        llgm_image_free(back);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut img = ptr::null_mut();
        let missing = CString::new("/nonexistent/dir/x.png").unwrap();
        assert_eq!(llgm_image_load(missing.as_ptr(), &mut img), LlgmStatus::Io);
        assert!(img.is_null());
        assert!(last_error().contains("/nonexistent/dir/x.png"));

        assert_eq!(llgm_image_load(ptr::null(), &mut img), LlgmStatus::NullPointer);
        assert_eq!(llgm_image_new(2, 2, 3, ptr::null(), &mut img), LlgmStatus::NullPointer);
        let data = [0.5; 12];
        assert_eq!(llgm_image_new(0, 2, 3, data.as_ptr(), &mut img), LlgmStatus::InvalidArgument);

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.llgm");
        std::fs::write(&junk, b"nope").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(llgm_model_load(cpath(&junk).as_ptr(), &mut model), LlgmStatus::Format);
        assert_eq!(llgm_model_primitive_count(ptr::null()), 0);

        llgm_image_free(ptr::null_mut());
        llgm_model_free(ptr::null_mut());
        llgm_dictionary_free(ptr::null_mut());
    }
}

#[test]
fn defaults_are_desk_scale() {
    let f = llgm_fit_params_default();
    assert_eq!((f.num_primitives, f.iterations), (2000, 3000));
    let e = llgm_enhance_params_default();
    assert_eq!(e.iterations, 2000);
    assert_eq!(e.e_target, 0.6);
    let d = llgm_dict_params_default();
    assert_eq!((d.k, d.p), (30, 5));
    let v = unsafe { CStr::from_ptr(llgm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn fit_dictionary_enhance_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let dark = new_image(16, 16, &gradient_image(16, 16, 0.2));

        let fit = LlgmFitParams {
            num_primitives: 30,
            scales: 2,
            iterations: 5,
            ..llgm_fit_params_default()
        };
        let mut model = ptr::null_mut();
        let mut psnr = 0.0;
        assert_eq!(llgm_fit(dark, &fit, &mut model, &mut psnr), LlgmStatus::Ok);
        assert!(psnr.is_finite());
        assert_eq!(llgm_model_primitive_count(model), 30);
        let model_path = cpath(&dir.path().join("m.llgm"));
        assert_eq!(llgm_model_save(model, model_path.as_ptr()), LlgmStatus::Ok);
        let mut reloaded = ptr::null_mut();
        assert_eq!(llgm_model_load(model_path.as_ptr(), &mut reloaded), LlgmStatus::Ok);

        let mut corpus = Vec::new();
        for (i, s) in [0.1, 0.3, 0.6].iter().enumerate() {
            let img = new_image(12, 12, &gradient_image(12, 12, *s));
            let p = cpath(&dir.path().join(format!("c{i}.png")));
            assert_eq!(llgm_image_save(img, p.as_ptr()), LlgmStatus::Ok);
            llgm_image_free(img);
            corpus.push(p);
        }
        let ptrs: Vec<_> = corpus.iter().map(|p| p.as_ptr()).collect();
        let params = LlgmDictParams { k: 2, p: 2, seed: 3 };
        let mut d = ptr::null_mut();
        assert_eq!(llgm_dictionary_build(ptrs.as_ptr(), ptrs.len(), &params, &mut d), LlgmStatus::Ok);
        let (mut k, mut p) = (0, 0);
        assert_eq!(llgm_dictionary_shape(d, &mut k, &mut p), LlgmStatus::Ok);
        assert_eq!((k, p), (2, 2));
        let too_many = LlgmDictParams { k: 50, ..params };
        let mut none = ptr::null_mut();
        assert_eq!(
            llgm_dictionary_build(ptrs.as_ptr(), ptrs.len(), &too_many, &mut none),
            LlgmStatus::InvalidArgument
        );
        assert!(last_error().contains("smaller K"));

        let enh = LlgmEnhanceParams {
            iterations: 10,
            ..llgm_enhance_params_default()
        };
        let mut out = ptr::null_mut();
        assert_eq!(llgm_enhance(dark, reloaded, d, &enh, &mut out), LlgmStatus::Ok);
        let (mut h, mut w) = (0, 0);
        assert_eq!(llgm_image_shape(out, &mut h, &mut w, ptr::null_mut()), LlgmStatus::Ok);
        assert_eq!((h, w), (16, 16));

        let other = new_image(8, 8, &gradient_image(8, 8, 1.0));
        let mut rejected = ptr::null_mut();
        assert_ne!(llgm_enhance(other, reloaded, d, &enh, &mut rejected), LlgmStatus::Ok);
        assert!(rejected.is_null());

        let mut m = std::mem::zeroed::<LlgmMetrics>();
        assert_eq!(llgm_metrics(dark, dark, &mut m), LlgmStatus::Ok);
        assert_eq!(m.psnr, 99.0);
        assert_eq!(m.loe, 0.0);
        assert_eq!(llgm_metrics(out, ptr::null(), &mut m), LlgmStatus::Ok);
        assert!(m.psnr.is_nan() && m.ssim.is_nan() && m.loe.is_nan());
        assert!(m.discrete_entropy.is_finite() && m.eme.is_finite());

        for img in [dark, out, other] {
            llgm_image_free(img);
        }
        llgm_model_free(model);
        llgm_model_free(reloaded);
        llgm_dictionary_free(d);
    }
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/llgm.h")).unwrap();
    for name in [
        "LlgmStatus",
        "LLGM_STATUS_OK",
        "typedef struct LlgmImage LlgmImage",
        "llgm_last_error",
        "llgm_image_load",
        "llgm_fit",
        "llgm_dictionary_build",
        "llgm_enhance",
        "llgm_metrics",
        "llgm_model_free",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    // the header must be valid C when a compiler is around
    if let Ok(o) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c99", "-"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut child| {
            use std::io::Write;
            child
                .stdin
                .take()
                .unwrap()
                .write_all(format!("{header}\nint main(void) {{ return llgm_version() == 0; }}\n").as_bytes())?;
            child.wait_with_output()
        })
    {
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
}
