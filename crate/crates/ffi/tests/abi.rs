use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use flexpose::generator::{init_generator, save_checkpoint, GeneratorConfig};
use flexpose::pose::save_poses;
use flexpose::synth::{sample_poses, PoseDistributionSpec};
use flexpose_ffi::*;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let n = unsafe { fp_last_error(ptr::null_mut(), 0) };
    let mut buf = vec![0u8; n + 1];
    unsafe { fp_last_error(buf.as_mut_ptr().cast(), buf.len()) };
    CStr::from_bytes_until_nul(&buf).unwrap().to_string_lossy().into_owned()
}

fn load_poses(path: &Path) -> *mut FpPoseSet {
    let mut set = ptr::null_mut();
    assert_eq!(unsafe { fp_poses_load(cpath(path).as_ptr(), &mut set) }, FpStatus::FpOk);
    set
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(fp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn poses_round_trip_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.jsonl");
    let poses = sample_poses(&PoseDistributionSpec::human_default(), 20, 4).unwrap();
    save_poses(&poses, &file).unwrap();

    let set = load_poses(&file);
    unsafe {
        assert_eq!(fp_poses_len(set), 20);
        assert_eq!(fp_poses_joints(set), 13);
        let mut buf = [0.0; 26];
        assert_eq!(fp_poses_coords(set, 3, buf.as_mut_ptr(), 26), FpStatus::FpOk);
        assert_eq!(buf.to_vec(), poses.poses[3].flatten());
        assert_eq!(fp_poses_coords(set, 3, buf.as_mut_ptr(), 10), FpStatus::FpBufferTooSmall);
        assert_eq!(fp_poses_coords(set, 99, buf.as_mut_ptr(), 26), FpStatus::FpInvalidArgument);
        assert!(last_error().contains("out of range"));

        let (mut m, mut bw, mut fd) = (f64::NAN, f64::NAN, f64::NAN);
        assert_eq!(fp_mmd2(set, set, 0.0, &mut m, &mut bw), FpStatus::FpOk);
        assert_eq!(m, 0.0);
        assert!(bw > 0.0);
        assert_eq!(fp_frechet(set, set, &mut fd), FpStatus::FpOk);
        assert!(fd.abs() < 1e-8);

        let mut px = vec![0u8; 3 * 32 * 32];
        assert_eq!(fp_rasterize(set, 0, 32, 32, px.as_mut_ptr(), px.len()), FpStatus::FpOk);
        assert!(px.iter().any(|&b| b != 0));
        assert_eq!(fp_rasterize(set, 0, 32, 32, px.as_mut_ptr(), 5), FpStatus::FpBufferTooSmall);

        let copy = dir.path().join("copy.jsonl");
        assert_eq!(fp_poses_save(set, cpath(&copy).as_ptr()), FpStatus::FpOk);
        assert_eq!(std::fs::read(&copy).unwrap(), std::fs::read(&file).unwrap());
        fp_poses_free(set);
    }
}

#[test]
fn generator_samples_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GeneratorConfig {
        d_z: 8,
        d_w: 8,
        layers: 4,
        d_h: 8,
        joints: 13,
        resolution: 8,
    };
    let ckpt = dir.path().join("g.fxp");
    save_checkpoint(&init_generator(cfg, 1).unwrap(), None, &ckpt).unwrap();
    let file = dir.path().join("p.jsonl");
    save_poses(&sample_poses(&PoseDistributionSpec::human_default(), 2, 0).unwrap(), &file).unwrap();
    let topo = load_poses(&file);
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(fp_generator_load(cpath(&ckpt).as_ptr(), &mut g), FpStatus::FpOk);
        assert_eq!(fp_generator_joints(g), 13);
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(fp_generator_sample(g, topo, 7, 3, &mut a), FpStatus::FpOk);
        assert_eq!(fp_generator_sample(g, topo, 7, 3, &mut b), FpStatus::FpOk);
        assert_eq!(fp_poses_len(a), 7);
        let (mut x, mut y) = ([0.0; 26], [0.0; 26]);
        for i in 0..7 {
            fp_poses_coords(a, i, x.as_mut_ptr(), 26);
            fp_poses_coords(b, i, y.as_mut_ptr(), 26);
            assert_eq!(x, y);
        }
        let mut none = ptr::null_mut();
        assert_eq!(fp_generator_sample(g, topo, 0, 3, &mut none), FpStatus::FpInvalidArgument);
        assert!(none.is_null());
        fp_poses_free(a);
        fp_poses_free(b);
        fp_poses_free(topo);
        fp_generator_free(g);
    }
}

#[test]
fn errors_map_to_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut set = ptr::null_mut();
    let missing = cpath(&dir.path().join("nope.jsonl"));
    unsafe {
        assert_eq!(fp_poses_load(missing.as_ptr(), &mut set), FpStatus::FpMissingArtifact);
        assert!(last_error().contains("nope.jsonl"));
        assert_eq!(fp_poses_load(ptr::null(), &mut set), FpStatus::FpNullPointer);
        assert_eq!(fp_poses_load(missing.as_ptr(), ptr::null_mut()), FpStatus::FpNullPointer);

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(&bad, "not json\n").unwrap();
        assert_eq!(fp_poses_load(cpath(&bad).as_ptr(), &mut set), FpStatus::FpParse);

        let junk = dir.path().join("junk.fxp");
        std::fs::write(&junk, b"garbage").unwrap();
        let mut g = ptr::null_mut();
        assert_eq!(fp_generator_load(cpath(&junk).as_ptr(), &mut g), FpStatus::FpCheckpoint);
        assert!(g.is_null());

        let mut out = 0.0;
        assert_eq!(fp_mmd2(ptr::null(), ptr::null(), 1.0, &mut out, ptr::null_mut()), FpStatus::FpNullPointer);
        assert_eq!(fp_poses_len(ptr::null()), 0);
        fp_poses_free(ptr::null_mut());
        fp_generator_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/flexpose.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "fp_version", "fp_last_error", "fp_generator_load", "fp_generator_free", "fp_generator_joints",
        "fp_generator_sample", "fp_poses_load", "fp_poses_save", "fp_poses_free", "fp_poses_len",
        "fp_poses_joints", "fp_poses_coords", "fp_mmd2", "fp_frechet", "fp_rasterize",
    ] {
        assert!(text.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(text.contains("typedef struct FpPoseSet FpPoseSet;"));

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"flexpose.h\"\nint main(void) { FpPoseSet *s = 0; return fp_poses_load(\"x\", &s) == FP_OK; }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler on PATH; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
