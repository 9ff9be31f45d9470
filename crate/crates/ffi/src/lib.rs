//! C ABI over the `pgmfuse` toolkit.
//!
//! Every object crosses the boundary as an opaque handle created by a
//! `*_read` / `*_build` style constructor and released with its `*_free`
//! function. Functions return a [`PgmStatus`]; on failure
//! [`pgm_last_error_message`] describes the error for the calling thread.
//! Paths are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use pgmfuse::groundtruth::rasterize_labels;
use pgmfuse::kitti_io::{self, CalibrationSet, ClassId, Point, PointCloud, RgbImage};
use pgmfuse::metrics::ConfusionMatrix;
use pgmfuse::models::{self, ArchKind, WeightBundle};
use pgmfuse::pgm::{self, GridSpec, LabelGrid, PgmTensor as Tensor};
use pgmfuse::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Validation = 5,
    Domain = 6,
    Config = 7,
    Integrity = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Network variants, numbered as in [`pgm_model_arch`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmArch {
    Baseline = 0,
    EarlyFusion = 1,
    MidFusion = 2,
}

/// Polar grid geometry; angles in radians.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgmGridSpec {
    pub rows: usize,
    pub cols: usize,
    pub azimuth_min: f64,
    pub azimuth_max: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
}

impl From<GridSpec> for PgmGridSpec {
    fn from(g: GridSpec) -> Self {
        PgmGridSpec {
            rows: g.rows,
            cols: g.cols,
            azimuth_min: g.azimuth_min,
            azimuth_max: g.azimuth_max,
            elevation_min: g.elevation_min,
            elevation_max: g.elevation_max,
        }
    }
}

impl From<PgmGridSpec> for GridSpec {
    fn from(g: PgmGridSpec) -> Self {
        GridSpec {
            rows: g.rows,
            cols: g.cols,
            azimuth_min: g.azimuth_min,
            azimuth_max: g.azimuth_max,
            elevation_min: g.elevation_min,
            elevation_max: g.elevation_max,
        }
    }
}

pub struct PgmCloud(PointCloud);
pub struct PgmCalib(CalibrationSet);
pub struct PgmImage(RgbImage);
pub struct PgmTensor(Tensor);
pub struct PgmLabels(LabelGrid);
pub struct PgmModel(WeightBundle);
pub struct PgmConfusion(ConfusionMatrix);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PgmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => PgmStatus::Io,
            Error::Format(_) => PgmStatus::Format,
            Error::Validation(_) => PgmStatus::Validation,
            Error::Domain(_) => PgmStatus::Domain,
            Error::Config(_) => PgmStatus::Config,
            Error::Integrity(_) => PgmStatus::Integrity,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PgmStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PgmStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PgmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PgmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            PgmStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    let slot = out_ptr(out, "output handle pointer")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pgm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a success.
///
/// The pointer stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn pgm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default 64 x 512 grid.
///
/// # Safety
/// `out` must be NULL or point to writable memory for one `PgmGridSpec`.
#[no_mangle]
pub unsafe extern "C" fn pgm_grid_default(out: *mut PgmGridSpec) -> PgmStatus {
    guard(|| {
        *out_ptr(out, "out")? = GridSpec::default().into();
        Ok(())
    })
}

/// # Safety
/// `path` must be NULL or a NUL-terminated string; `out` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn pgm_cloud_read(path: *const c_char, out: *mut *mut PgmCloud) -> PgmStatus {
    guard(|| {
        let cloud = kitti_io::read_point_cloud(&path_arg(path, "path")?)?;
        emit(out, PgmCloud(cloud))
    })
}

/// Cloud from `count` interleaved (x, y, z, intensity) floats.
///
/// # Safety
/// `xyzi` must point to `4 * count` readable floats.
#[no_mangle]
pub unsafe extern "C" fn pgm_cloud_from_xyzi(
    xyzi: *const f32,
    count: usize,
    out: *mut *mut PgmCloud,
) -> PgmStatus {
    guard(|| {
        if xyzi.is_null() && count > 0 {
            return Err(null("xyzi"));
        }
        let values = if count == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(xyzi, count * 4)
        };
        let points = values
            .chunks_exact(4)
            .map(|p| Point::new(p[0], p[1], p[2], p[3]))
            .collect();
        emit(out, PgmCloud(PointCloud::new(points)))
    })
}

/// # Safety
/// `cloud` must be a live handle or NULL; `out` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_cloud_len(cloud: *const PgmCloud, out: *mut usize) -> PgmStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(cloud, "cloud")?.0.len();
        Ok(())
    })
}

/// # Safety
/// `cloud` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pgm_cloud_free(cloud: *mut PgmCloud) {
    release(cloud)
}

/// # Safety
/// `path` must be NULL or NUL-terminated; `out` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_calib_read(path: *const c_char, out: *mut *mut PgmCalib) -> PgmStatus {
    guard(|| {
        let calib = kitti_io::read_calibration(&path_arg(path, "path")?)?;
        emit(out, PgmCalib(calib))
    })
}

/// # Safety
/// `calib` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pgm_calib_free(calib: *mut PgmCalib) {
    release(calib)
}

/// # Safety
/// `path` must be NULL or NUL-terminated; `out` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_image_read(path: *const c_char, out: *mut *mut PgmImage) -> PgmStatus {
    guard(|| {
        let image = kitti_io::read_image(&path_arg(path, "path")?)?;
        emit(out, PgmImage(image))
    })
}

/// # Safety
/// `image` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pgm_image_free(image: *mut PgmImage) {
    release(image)
}

/// Project a cloud onto the grid (XYZDI channels).
///
/// # Safety
/// Pointers must be NULL or valid; `grid` NULL selects the default grid.
#[no_mangle]
pub unsafe extern "C" fn pgm_tensor_build(
    cloud: *const PgmCloud,
    grid: *const PgmGridSpec,
    out: *mut *mut PgmTensor,
) -> PgmStatus {
    guard(|| {
        let cloud = handle(cloud, "cloud")?;
        let spec: GridSpec = grid.as_ref().map_or_else(GridSpec::default, |g| (*g).into());
        spec.validate()?;
        emit(out, PgmTensor(pgm::build_pgm(&cloud.0, &spec)))
    })
}

/// New XYZDIRGB tensor with camera colors attached.
///
/// # Safety
/// All handles must be live; `out` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_tensor_fuse_rgb(
    tensor: *const PgmTensor,
    image: *const PgmImage,
    calib: *const PgmCalib,
    out: *mut *mut PgmTensor,
) -> PgmStatus {
    guard(|| {
        let fused = pgm::fuse_rgb(
            &handle(tensor, "tensor")?.0,
            &handle(image, "image")?.0,
            &handle(calib, "calib")?.0,
        )?;
        emit(out, PgmTensor(fused))
    })
}

/// # Safety
/// `path` must be NULL or NUL-terminated; `out` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_tensor_read(
    path: *const c_char,
    out: *mut *mut PgmTensor,
) -> PgmStatus {
    guard(|| {
        let t = kitti_io::read_tensor(&path_arg(path, "path")?)?;
        emit(out, PgmTensor(t))
    })
}

/// # Safety
/// `tensor` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pgm_tensor_write(
    tensor: *const PgmTensor,
    path: *const c_char,
) -> PgmStatus {
    guard(|| {
        kitti_io::write_tensor(&path_arg(path, "path")?, &handle(tensor, "tensor")?.0)?;
        Ok(())
    })
}

/// Rows, columns and channels (5 or 8).
///
/// # Safety
/// `tensor` must be live; outputs writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_tensor_dims(
    tensor: *const PgmTensor,
    rows: *mut usize,
    cols: *mut usize,
    channels: *mut usize,
) -> PgmStatus {
    guard(|| {
        let t = &handle(tensor, "tensor")?.0;
        *out_ptr(rows, "rows")? = t.spec().rows;
        *out_ptr(cols, "cols")? = t.spec().cols;
        *out_ptr(channels, "channels")? = t.channels();
        Ok(())
    })
}

/// Number of occupied cells.
///
/// # Safety
/// `tensor` must be live; `out` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_tensor_occupied(
    tensor: *const PgmTensor,
    out: *mut usize,
) -> PgmStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(tensor, "tensor")?.0.occupied();
        Ok(())
    })
}

/// Copy the row-major HWC values into `buf` of `len` floats.
///
/// # Safety
/// `buf` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn pgm_tensor_copy_data(
    tensor: *const PgmTensor,
    buf: *mut f32,
    len: usize,
) -> PgmStatus {
    guard(|| {
        let data = handle(tensor, "tensor")?.0.data();
        copy_out(data, buf, len)
    })
}

/// Copy the occupancy mask (1 occupied, 0 empty) into `buf` of `len` bytes.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pgm_tensor_copy_mask(
    tensor: *const PgmTensor,
    buf: *mut u8,
    len: usize,
) -> PgmStatus {
    guard(|| {
        let mask: Vec<u8> = handle(tensor, "tensor")?.0.mask().iter().map(|&m| m as u8).collect();
        copy_out(&mask, buf, len)
    })
}

unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, len: usize) -> Result<(), Failure> {
    if buf.is_null() {
        return Err(null("buf"));
    }
    if len < src.len() {
        return Err(Failure(
            PgmStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    std::slice::from_raw_parts_mut(buf, src.len()).copy_from_slice(src);
    Ok(())
}

/// # Safety
/// `tensor` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pgm_tensor_free(tensor: *mut PgmTensor) {
    release(tensor)
}

/// Ground-truth grid from a KITTI object label file.
///
/// # Safety
/// Handles must be live, `label_path` NUL-terminated, `out` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_labels_rasterize(
    tensor: *const PgmTensor,
    label_path: *const c_char,
    calib: *const PgmCalib,
    out: *mut *mut PgmLabels,
) -> PgmStatus {
    guard(|| {
        let tensor = handle(tensor, "tensor")?;
        let boxes = kitti_io::read_boxes(&path_arg(label_path, "label_path")?, &handle(calib, "calib")?.0)?;
        emit(out, PgmLabels(rasterize_labels(&tensor.0, &boxes)))
    })
}

/// # Safety
/// `path` must be NULL or NUL-terminated; `out` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_labels_read(path: *const c_char, out: *mut *mut PgmLabels) -> PgmStatus {
    guard(|| {
        let l = kitti_io::read_labels(&path_arg(path, "path")?)?;
        emit(out, PgmLabels(l))
    })
}

/// # Safety
/// `labels` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pgm_labels_write(labels: *const PgmLabels, path: *const c_char) -> PgmStatus {
    guard(|| {
        kitti_io::write_labels(&path_arg(path, "path")?, &handle(labels, "labels")?.0)?;
        Ok(())
    })
}

/// Copy class ids (0 Background, 1 Car, 2 Pedestrian, 3 Cyclist) row-major into `buf`.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pgm_labels_copy(labels: *const PgmLabels, buf: *mut u8, len: usize) -> PgmStatus {
    guard(|| {
        let ids: Vec<u8> = handle(labels, "labels")?.0.labels().iter().map(|&c| c as u8).collect();
        copy_out(&ids, buf, len)
    })
}

/// # Safety
/// `labels` must be live; `out` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_labels_count(labels: *const PgmLabels, class_id: u8, out: *mut usize) -> PgmStatus {
    guard(|| {
        let class = ClassId::from_index(class_id as usize)
            .ok_or_else(|| invalid(format!("class id {class_id} out of range")))?;
        *out_ptr(out, "out")? = handle(labels, "labels")?.0.count(class);
        Ok(())
    })
}

/// # Safety
/// `labels` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pgm_labels_free(labels: *mut PgmLabels) {
    release(labels)
}

/// # Safety
/// `path` must be NULL or NUL-terminated; `out` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_model_load(path: *const c_char, out: *mut *mut PgmModel) -> PgmStatus {
    guard(|| {
        let w = models::load_weights(&path_arg(path, "path")?)?;
        emit(out, PgmModel(w))
    })
}

/// # Safety
/// `model` must be live; `out` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_model_arch(model: *const PgmModel, out: *mut PgmArch) -> PgmStatus {
    guard(|| {
        *out_ptr(out, "out")? = match handle(model, "model")?.0.arch() {
            ArchKind::Baseline => PgmArch::Baseline,
            ArchKind::EarlyFusion => PgmArch::EarlyFusion,
            ArchKind::MidFusion => PgmArch::MidFusion,
        };
        Ok(())
    })
}

/// Per-cell argmax labels; empty cells are Background.
///
/// # Safety
/// Handles must be live; `out` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_model_predict(
    model: *const PgmModel,
    tensor: *const PgmTensor,
    out: *mut *mut PgmLabels,
) -> PgmStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let labels = models::predict(&m.meta.spec, m, &handle(tensor, "tensor")?.0)?;
        emit(out, PgmLabels(labels))
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pgm_model_free(model: *mut PgmModel) {
    release(model)
}

/// Empty 4-class confusion matrix.
///
/// # Safety
/// `out` must be writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_confusion_new(out: *mut *mut PgmConfusion) -> PgmStatus {
    guard(|| emit(out, PgmConfusion(ConfusionMatrix::default())))
}

/// Add one frame; `mask_tensor` selects occupied cells, NULL evaluates every cell.
///
/// # Safety
/// `cm`, `pred` and `gt` must be live; `mask_tensor` live or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_confusion_accumulate(
    cm: *mut PgmConfusion,
    pred: *const PgmLabels,
    gt: *const PgmLabels,
    mask_tensor: *const PgmTensor,
) -> PgmStatus {
    guard(|| {
        let (pred, gt) = (&handle(pred, "pred")?.0, &handle(gt, "gt")?.0);
        let mask = match mask_tensor.as_ref() {
            Some(t) => t.0.mask().to_vec(),
            None => vec![true; gt.labels().len()],
        };
        let cm = out_ptr(cm, "cm")?;
        cm.0 = cm.0.accumulate(pred, gt, &mask)?;
        Ok(())
    })
}

/// IoU of one class; `defined` is 0 when the class never occurs in either labeling.
///
/// # Safety
/// `cm` must be live; outputs writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_confusion_iou(
    cm: *const PgmConfusion,
    class_id: u8,
    iou: *mut f64,
    defined: *mut bool,
) -> PgmStatus {
    guard(|| {
        let ious = handle(cm, "cm")?.0.iou_per_class();
        let v = *ious
            .get(class_id as usize)
            .ok_or_else(|| invalid(format!("class id {class_id} out of range")))?;
        *out_ptr(iou, "iou")? = v.unwrap_or(f64::NAN);
        *out_ptr(defined, "defined")? = v.is_some();
        Ok(())
    })
}

/// Mean IoU over Car, Pedestrian and Cyclist, skipping undefined classes.
///
/// # Safety
/// `cm` must be live; `out` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn pgm_confusion_miou(cm: *const PgmConfusion, out: *mut f64) -> PgmStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(cm, "cm")?.0.miou(&ClassId::FOREGROUND)?;
        Ok(())
    })
}

/// # Safety
/// `cm` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pgm_confusion_free(cm: *mut PgmConfusion) {
    release(cm)
}
