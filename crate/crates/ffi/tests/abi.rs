use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use latentwalk::latent::latent_for_seed;
use latentwalk::pipeline::{Pipeline, PipelineConfig, Stage};
use latentwalk::scenegen::{self, GeneratorConstants, DEFAULT_GENERATOR_SEED};
use latentwalk::semantics::LatentSource;
use latentwalk::service::{self, ServiceState, SynthesisRequest};
use latentwalk_ffi::*;

fn last_error() -> String {
    let p = lw_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_artifacts(dir: &Path) {
    let overrides: Vec<(String, String)> = [
        ("output_dir", format!("{:?}", dir.to_string_lossy())),
        ("n", "200".into()),
        ("inversion.eval_subset_size", "50".into()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let p = Pipeline::new(PipelineConfig::from_toml_with("", &overrides).unwrap());
    for s in [Stage::GenWorld, Stage::GenDataset, Stage::Fit, Stage::Orthogonalize] {
        p.run(s).unwrap();
    }
}

#[test]
fn render_matches_core() {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { lw_generator_new(DEFAULT_GENERATOR_SEED, 16, &mut g) }, LwStatus::Ok);
    assert_eq!(unsafe { lw_generator_dim(g) }, 16);
    let mut z = [0.0; 16];
    assert_eq!(unsafe { lw_sample_latent(9, 0.5, 16, z.as_mut_ptr()) }, LwStatus::Ok);
    assert_eq!(z.to_vec(), latent_for_seed(9, 0.5, 16).unwrap().into_vec());
    let mut pixels = vec![0u8; LW_IMAGE_BYTES];
    let s = unsafe { lw_generator_render(g, z.as_ptr(), 16, pixels.as_mut_ptr(), pixels.len()) };
    assert_eq!(s, LwStatus::Ok);
    let constants = GeneratorConstants::from_seed(DEFAULT_GENERATOR_SEED, 16).unwrap();
    let expected = scenegen::generate(&latent_for_seed(9, 0.5, 16).unwrap(), &constants).unwrap();
    assert_eq!(pixels, expected.to_bytes());
    unsafe { lw_generator_free(g) };
}

#[test]
fn argument_errors() {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { lw_generator_new(1, 0, &mut g) }, LwStatus::InvalidArgument);
    assert!(g.is_null());
    assert_eq!(unsafe { lw_generator_new(1, 16, ptr::null_mut()) }, LwStatus::NullPointer);
    assert_eq!(unsafe { lw_generator_new(1, 16, &mut g) }, LwStatus::Ok);

    let z = [0.0; 8];
    let mut small = [0u8; 16];
    let s = unsafe { lw_generator_render(g, z.as_ptr(), 8, small.as_mut_ptr(), small.len()) };
    assert_eq!(s, LwStatus::InvalidArgument);
    assert!(last_error().contains("expects 16"));

    let z = [0.0; 16];
    let s = unsafe { lw_generator_render(g, z.as_ptr(), 16, small.as_mut_ptr(), small.len()) };
    assert_eq!(s, LwStatus::BufferTooSmall);

    let bad = [f64::NAN; 16];
    let mut buf = vec![0u8; LW_IMAGE_BYTES];
    let s = unsafe { lw_generator_render(g, bad.as_ptr(), 16, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(s, LwStatus::Numeric);

    let s = unsafe { lw_generator_render(ptr::null(), z.as_ptr(), 16, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(s, LwStatus::NullPointer);
    assert_eq!(unsafe { lw_generator_dim(ptr::null()) }, 0);
    unsafe {
        lw_generator_free(g);
        lw_generator_free(ptr::null_mut());
        lw_editor_free(ptr::null_mut());
        lw_buffer_free(ptr::null_mut());
    }
    assert!(!unsafe { CStr::from_ptr(lw_version()) }.to_bytes().is_empty());
}

#[test]
fn missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let source = CString::new("hidden-true").unwrap();
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { lw_editor_open(path.as_ptr(), source.as_ptr(), &mut e) }, LwStatus::NotFound);
    assert!(e.is_null());
    assert!(last_error().contains("not found"));

    let file = CString::new(dir.path().join("generator.json").to_str().unwrap()).unwrap();
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { lw_generator_open(file.as_ptr(), &mut g) }, LwStatus::NotFound);
    std::fs::write(dir.path().join("generator.json"), "{").unwrap();
    assert_eq!(unsafe { lw_generator_open(file.as_ptr(), &mut g) }, LwStatus::Malformed);

    let bogus = CString::new("nonsense").unwrap();
    assert_eq!(unsafe { lw_editor_open(path.as_ptr(), bogus.as_ptr(), &mut e) }, LwStatus::InvalidArgument);
}

#[test]
fn editor_matches_service() {
    let dir = tempfile::tempdir().unwrap();
    small_artifacts(dir.path());
    let state = ServiceState::load(dir.path(), LatentSource::HiddenTrue).unwrap();

    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let source = CString::new("hidden-true").unwrap();
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { lw_editor_open(path.as_ptr(), source.as_ptr(), &mut e) }, LwStatus::Ok);
    assert_eq!(unsafe { lw_editor_dim(e) }, 16);

    let req = SynthesisRequest {
        seed: 4,
        psi: Some(0.5),
        alpha_income: 1.5,
        alpha_education: -7.0,
        alpha_health: 0.0,
    };
    let (image, _) = service::synthesize(&req, &state).unwrap();
    let mut pixels = vec![0u8; LW_IMAGE_BYTES];
    let s = unsafe { lw_editor_synthesize(e, 4, 0.5, 1.5, -7.0, 0.0, pixels.as_mut_ptr(), pixels.len()) };
    assert_eq!(s, LwStatus::Ok);
    assert_eq!(pixels, image.to_bytes());

    let mut buf = LwBuffer { data: ptr::null_mut(), len: 0 };
    assert_eq!(unsafe { lw_editor_synthesize_png(e, 4, 0.5, 1.5, -7.0, 0.0, &mut buf) }, LwStatus::Ok);
    let png = unsafe { std::slice::from_raw_parts(buf.data, buf.len) }.to_vec();
    assert_eq!(png, image.to_png().unwrap());
    unsafe { lw_buffer_free(&mut buf) };
    assert!(buf.data.is_null());

    let z = latent_for_seed(4, 0.5, 16).unwrap();
    let mut values = [0.0; 3];
    assert_eq!(unsafe { lw_editor_decision(e, z.as_slice().as_ptr(), 16, values.as_mut_ptr()) }, LwStatus::Ok);
    for (i, d) in latentwalk::world::Dimension::ALL.iter().enumerate() {
        let b = state.boundaries.iter().find(|b| b.dimension == *d).unwrap();
        assert_eq!(values[i], b.decision(&z).unwrap());
    }
    unsafe { lw_editor_free(e) };
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/latentwalk.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["lw_generator_new", "lw_editor_synthesize", "lw_last_error", "LW_STATUS_OK", "LwEditor"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ LwGenerator *g = 0; return (int)lw_generator_new(1, 16, &g); }}\n",
            header.display()
        ),
    )
    .unwrap();
    match std::process::Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror"]).arg(&src).status() {
        Ok(status) => assert!(status.success(), "header failed to compile"),
        Err(_) => eprintln!("no C compiler available, skipped syntax check"),
    }
}
