//! C interface. Datasets and solutions are opaque handles owned by the
//! caller and released with the matching `_free` function. Every fallible
//! call returns a [`DpcStatus`]; the message of the last failure on the
//! calling thread is available from [`dpc_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dpclust::kmeans::{dp_kmeans_exact, KMeansConfig};
use dpclust::kmedian::{dp_kmedian, TreeParams};
use dpclust::{normalize, Dataset, Error, Privacy};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    MemoryOverflow = 3,
    DataError = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

pub struct DpcDataset {
    inner: Dataset,
}

pub struct DpcSolution {
    centers: Vec<Vec<f64>>,
    dim: usize,
    cost: f64,
    epsilon_spent: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn status_of(e: &Error) -> DpcStatus {
    match e {
        Error::MemoryOverflow { .. } => DpcStatus::MemoryOverflow,
        Error::EmptyDataset
        | Error::InvalidCoordinate
        | Error::DimensionMismatch { .. }
        | Error::OutOfUniverse
        | Error::Io(_)
        | Error::Csv(_) => DpcStatus::DataError,
        _ => DpcStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), DpcStatus>) -> DpcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DpcStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            DpcStatus::Panic
        }
    }
}

fn lift<T>(r: dpclust::Result<T>) -> Result<T, DpcStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn null(what: &str) -> DpcStatus {
    set_error(format!("{what} is null"));
    DpcStatus::NullPointer
}

/// `epsilon = INFINITY` runs without privacy.
fn privacy_for(epsilon: f64) -> Result<Privacy, DpcStatus> {
    if epsilon == f64::INFINITY {
        Ok(Privacy::disabled())
    } else {
        lift(Privacy::new(epsilon))
    }
}

/// Copies `n * d` row-major coordinates and normalizes them into the ball of
/// radius `lambda`.
///
/// # Safety
/// `points` must point to `n * d` readable doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpc_dataset_new(
    points: *const f64,
    n: usize,
    d: usize,
    lambda: f64,
    out: *mut *mut DpcDataset,
) -> DpcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if points.is_null() {
            return Err(null("points"));
        }
        if n == 0 || d == 0 {
            set_error("n and d must be positive");
            return Err(DpcStatus::DataError);
        }
        let len = n.checked_mul(d).ok_or_else(|| {
            set_error("n * d overflows");
            DpcStatus::InvalidArgument
        })?;
        let flat = std::slice::from_raw_parts(points, len);
        let rows: Vec<Vec<f64>> = flat.chunks(d).map(<[f64]>::to_vec).collect();
        let inner = lift(normalize(&rows, lambda))?;
        *out = Box::into_raw(Box::new(DpcDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from [`dpc_dataset_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dpc_dataset_free(ds: *mut DpcDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn dpc_dataset_len(ds: *const DpcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn dpc_dataset_dim(ds: *const DpcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.dim())
}

unsafe fn solve(
    ds: *const DpcDataset,
    out: *mut *mut DpcSolution,
    f: impl FnOnce(&Dataset) -> Result<(Vec<Vec<f64>>, f64, f64), DpcStatus>,
) -> DpcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let (centers, cost, epsilon_spent) = f(&ds.inner)?;
        let centers = ds.inner.denormalize(&centers);
        *out = Box::into_raw(Box::new(DpcSolution {
            centers,
            dim: ds.inner.dim(),
            cost,
            epsilon_spent,
        }));
        Ok(())
    })
}

/// Private tree k-median with the default (theory) tree parameters.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dpc_kmedian(
    ds: *const DpcDataset,
    k: usize,
    epsilon: f64,
    seed: u64,
    out: *mut *mut DpcSolution,
) -> DpcStatus {
    solve(ds, out, |data| {
        let p = privacy_for(epsilon)?;
        let s = lift(dp_kmedian(data, k, &p, &TreeParams::theory(), seed))?;
        Ok((s.centers, s.cost, s.ledger.spent()))
    })
}

/// Private k-means: tree bicriteria rounds followed by reverse greedy.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dpc_kmeans(
    ds: *const DpcDataset,
    k: usize,
    epsilon: f64,
    seed: u64,
    out: *mut *mut DpcSolution,
) -> DpcStatus {
    solve(ds, out, |data| {
        let p = privacy_for(epsilon)?;
        let s = lift(dp_kmeans_exact(data, k, &p, &KMeansConfig::default(), seed))?;
        Ok((s.centers, s.cost, s.ledger.spent()))
    })
}

/// # Safety
/// `sol` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn dpc_solution_num_centers(sol: *const DpcSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.centers.len())
}

/// # Safety
/// `sol` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn dpc_solution_dim(sol: *const DpcSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.dim)
}

/// Clustering cost in normalized coordinates; NaN for a null handle.
///
/// # Safety
/// `sol` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn dpc_solution_cost(sol: *const DpcSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.cost)
}

/// # Safety
/// `sol` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn dpc_solution_epsilon_spent(sol: *const DpcSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.epsilon_spent)
}

/// Writes the centers, in input coordinates, row-major into `buf`, which must
/// hold `len >= num_centers * dim` doubles.
///
/// # Safety
/// `sol` must be a live solution handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dpc_solution_centers(
    sol: *const DpcSolution,
    buf: *mut f64,
    len: usize,
) -> DpcStatus {
    guard(|| {
        let s = sol.as_ref().ok_or_else(|| null("solution"))?;
        let need = s.centers.len() * s.dim;
        if need > 0 && buf.is_null() {
            return Err(null("buf"));
        }
        if len < need {
            set_error(format!("buffer holds {len} doubles, {need} needed"));
            return Err(DpcStatus::BufferTooSmall);
        }
        for (i, x) in s.centers.iter().flatten().enumerate() {
            *buf.add(i) = *x;
        }
        Ok(())
    })
}

/// # Safety
/// `sol` must be null or a handle from a solver call not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dpc_solution_free(sol: *mut DpcSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dpc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}
