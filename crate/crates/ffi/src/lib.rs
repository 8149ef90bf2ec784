//! C ABI over the flexpose library.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free`. Every fallible call returns an [`FpStatus`];
//! on failure, [`fp_last_error`] copies out a message for the calling
//! thread. Panics never unwind into C: they surface as `FP_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use flexpose::generator::{load_checkpoint, Generator, TransferMatrix};
use flexpose::metrics::{frechet_distance, median_bandwidth, mmd2, SampleMatrix};
use flexpose::pose::{load_poses, save_poses, PoseSet};
use flexpose::render::rasterize;
use flexpose::train::sample_target;
use flexpose::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FpStatus {
    FpOk = 0,
    FpNullPointer = 1,
    FpInvalidArgument = 2,
    FpConfig = 3,
    FpNumerical = 4,
    FpIo = 5,
    FpParse = 6,
    FpCheckpoint = 7,
    FpMissingArtifact = 8,
    FpBufferTooSmall = 9,
    FpPanic = 10,
}

/// A trained generator, with its transfer matrix when one was saved.
pub struct FpGenerator {
    generator: Generator,
    tau: TransferMatrix,
}

/// A set of poses sharing one skeleton.
pub struct FpPoseSet {
    set: PoseSet,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> FpStatus {
    match e {
        _ if e.is_numerical() => FpStatus::FpNumerical,
        Error::InvalidArgument(_) | Error::Topology(_) | Error::Shape { .. } => FpStatus::FpInvalidArgument,
        Error::Config(_) => FpStatus::FpConfig,
        Error::Parse { .. } | Error::Json(_) => FpStatus::FpParse,
        Error::Checkpoint(_) | Error::ChecksumMismatch { .. } => FpStatus::FpCheckpoint,
        Error::MissingArtifact(_) => FpStatus::FpMissingArtifact,
        _ => FpStatus::FpIo,
    }
}

struct Fail(FpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FpStatus::FpNullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FpStatus::FpOk,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            FpStatus::FpPanic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(FpStatus::FpInvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_slot<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `len` bytes. Returns the full message length without the
/// terminator, so a caller can size a buffer with `buf = NULL, len = 0`.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fp_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a generator checkpoint. A checkpoint without a transfer matrix
/// samples the source distribution.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_generator_load(path: *const c_char, out: *mut *mut FpGenerator) -> FpStatus {
    guard(|| {
        let slot = out_slot(out, "out")?;
        let (generator, tau) = load_checkpoint(path_arg(path)?)?;
        let tau = tau.unwrap_or_else(|| TransferMatrix::identity(generator.config()));
        *slot = Box::into_raw(Box::new(FpGenerator { generator, tau }));
        Ok(())
    })
}

/// # Safety
/// `g` must be null or a handle from [`fp_generator_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn fp_generator_free(g: *mut FpGenerator) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Joint count of the generator's skeleton, or 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fp_generator_joints(g: *const FpGenerator) -> usize {
    g.as_ref().map_or(0, |g| g.generator.config().joints)
}

/// Draws `n` poses through the loaded transfer matrix. `topology_like`
/// supplies the skeleton (any pose set with the generator's joint count).
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_generator_sample(
    g: *const FpGenerator,
    topology_like: *const FpPoseSet,
    n: usize,
    seed: u64,
    out: *mut *mut FpPoseSet,
) -> FpStatus {
    guard(|| {
        let g = handle(g, "generator")?;
        let topo = &handle(topology_like, "topology_like")?.set.topology;
        let slot = out_slot(out, "out")?;
        let s = sample_target(&g.generator, &g.tau, topo, n, seed, None)?;
        *slot = Box::into_raw(Box::new(FpPoseSet { set: s.poses }));
        Ok(())
    })
}

/// Reads a JSON-lines pose file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_poses_load(path: *const c_char, out: *mut *mut FpPoseSet) -> FpStatus {
    guard(|| {
        let slot = out_slot(out, "out")?;
        let set = load_poses(path_arg(path)?)?;
        *slot = Box::into_raw(Box::new(FpPoseSet { set }));
        Ok(())
    })
}

/// # Safety
/// `set` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fp_poses_save(set: *const FpPoseSet, path: *const c_char) -> FpStatus {
    guard(|| {
        let set = handle(set, "set")?;
        save_poses(&set.set, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `set` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn fp_poses_free(set: *mut FpPoseSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of poses, or 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fp_poses_len(set: *const FpPoseSet) -> usize {
    set.as_ref().map_or(0, |s| s.set.len())
}

/// Joints per pose, or 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fp_poses_joints(set: *const FpPoseSet) -> usize {
    set.as_ref().map_or(0, |s| s.set.topology.joint_count())
}

/// Writes pose `index` as `x0, y0, x1, y1, ...` into `buf` (`2M` doubles).
///
/// # Safety
/// `set` must be live; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fp_poses_coords(set: *const FpPoseSet, index: usize, buf: *mut f64, len: usize) -> FpStatus {
    guard(|| {
        let set = &handle(set, "set")?.set;
        let pose = set.poses.get(index).ok_or_else(|| {
            Fail(
                FpStatus::FpInvalidArgument,
                format!("index {index} out of range for {} poses", set.len()),
            )
        })?;
        let flat = pose.flatten();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < flat.len() {
            return Err(Fail(FpStatus::FpBufferTooSmall, format!("need {} doubles, got {len}", flat.len())));
        }
        ptr::copy_nonoverlapping(flat.as_ptr(), buf, flat.len());
        Ok(())
    })
}

fn matrices(a: &FpPoseSet, b: &FpPoseSet) -> Result<(SampleMatrix, SampleMatrix), Fail> {
    Ok((SampleMatrix::from_poses(&a.set)?, SampleMatrix::from_poses(&b.set)?))
}

/// Unbiased MMD² on flattened coordinates. `bandwidth ≤ 0` selects the
/// median heuristic; the bandwidth used is written to `used_bandwidth`
/// when that pointer is non-null.
///
/// # Safety
/// Handles must be live; `out` must be writable; `used_bandwidth` null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fp_mmd2(
    a: *const FpPoseSet,
    b: *const FpPoseSet,
    bandwidth: f64,
    out: *mut f64,
    used_bandwidth: *mut f64,
) -> FpStatus {
    guard(|| {
        let (x, y) = matrices(handle(a, "a")?, handle(b, "b")?)?;
        let slot = out_slot(out, "out")?;
        let sigma = if bandwidth > 0.0 { bandwidth } else { median_bandwidth(&x, &y)? };
        *slot = mmd2(&x, &y, sigma)?;
        if let Some(u) = used_bandwidth.as_mut() {
            *u = sigma;
        }
        Ok(())
    })
}

/// Fréchet distance between Gaussian fits of the two sets.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_frechet(a: *const FpPoseSet, b: *const FpPoseSet, out: *mut f64) -> FpStatus {
    guard(|| {
        let (x, y) = matrices(handle(a, "a")?, handle(b, "b")?)?;
        *out_slot(out, "out")? = frechet_distance(&x, &y)?;
        Ok(())
    })
}

/// Rasterizes pose `index` as row-major RGB8 into `buf`
/// (`3 · width · height` bytes).
///
/// # Safety
/// `set` must be live; `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fp_rasterize(
    set: *const FpPoseSet,
    index: usize,
    width: usize,
    height: usize,
    buf: *mut u8,
    len: usize,
) -> FpStatus {
    guard(|| {
        let set = &handle(set, "set")?.set;
        let pose = set
            .poses
            .get(index)
            .ok_or_else(|| Fail(FpStatus::FpInvalidArgument, format!("index {index} out of range")))?;
        let img = rasterize(pose, &set.topology, width, height)?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < img.pixels.len() {
            return Err(Fail(
                FpStatus::FpBufferTooSmall,
                format!("need {} bytes, got {len}", img.pixels.len()),
            ));
        }
        ptr::copy_nonoverlapping(img.pixels.as_ptr(), buf, img.pixels.len());
        Ok(())
    })
}
